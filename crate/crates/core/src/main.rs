fn main() -> std::process::ExitCode {
    vidstall::cli::main()
}
