fn main() -> std::process::ExitCode {
    dyntraj::cli::main()
}
