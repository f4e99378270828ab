fn main() {
    std::process::exit(meanfield_cli::run(std::env::args_os()));
}
