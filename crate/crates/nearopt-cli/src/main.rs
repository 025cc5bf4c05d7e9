fn main() {
    std::process::exit(nearopt_cli::run(std::env::args_os()));
}
