fn main() {
    std::process::exit(iwave::cli::main_with(std::env::args_os()));
}
