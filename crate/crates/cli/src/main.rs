fn main() {
    std::process::exit(lemnika::main_with_args(std::env::args_os()));
}
