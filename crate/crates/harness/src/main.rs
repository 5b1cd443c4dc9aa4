fn main() {
    std::process::exit(peginsert::cli::main_with_args(std::env::args_os()));
}
