fn main() -> std::process::ExitCode {
    dcrm::cli::main_entry()
}
