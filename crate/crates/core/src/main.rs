fn main() {
    std::process::exit(textbalance::expcli::cli::main_with_args(std::env::args_os()));
}
