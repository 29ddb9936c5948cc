fn main() -> std::process::ExitCode {
    viewgrid::cli::main()
}
