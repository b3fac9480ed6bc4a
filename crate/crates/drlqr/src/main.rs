fn main() {
    std::process::exit(drlqr::cli::main_with_args(std::env::args_os()));
}
