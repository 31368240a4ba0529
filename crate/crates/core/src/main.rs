fn main() -> std::process::ExitCode {
    snowflake::cli::main()
}
