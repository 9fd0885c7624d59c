fn main() {
    std::process::exit(textdistill::cli::main_with_args(std::env::args_os()));
}
