fn main() {
    std::process::exit(napinn::cli::main_with(std::env::args_os()));
}
