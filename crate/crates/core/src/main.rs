fn main() {
    std::process::exit(doughnut_core::cli::main_with_args(std::env::args_os()));
}
