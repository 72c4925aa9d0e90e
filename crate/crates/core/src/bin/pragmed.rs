fn main() {
    std::process::exit(pragmed::cli::main_with_args(std::env::args_os()));
}
