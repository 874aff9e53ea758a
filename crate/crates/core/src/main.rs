fn main() {
    std::process::exit(conecalc::cli::main_with_args(std::env::args_os()));
}
