fn main() {
    std::process::exit(bagcn::cli::main_with_args(std::env::args_os()));
}
