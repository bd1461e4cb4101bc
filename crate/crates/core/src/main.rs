fn main() {
    std::process::exit(proprio::cli::run_command(std::env::args_os()));
}
