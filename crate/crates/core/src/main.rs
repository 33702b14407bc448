fn main() {
    std::process::exit(calpsc::cli::main_with_args(std::env::args_os()));
}
