fn main() {
    std::process::exit(plugid::cli::main_with_args(std::env::args_os()));
}
