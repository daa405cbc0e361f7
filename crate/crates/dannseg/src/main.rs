fn main() {
    std::process::exit(dannseg::main_with_args(std::env::args_os()));
}
