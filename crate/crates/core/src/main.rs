fn main() -> std::process::ExitCode {
    cascade_qa::cli::main_entry()
}
