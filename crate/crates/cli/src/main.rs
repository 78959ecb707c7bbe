fn main() -> std::process::ExitCode {
    trialforge_cli::main_entry()
}
