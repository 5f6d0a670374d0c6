fn main() -> std::process::ExitCode {
    phaserec::cli::main()
}
