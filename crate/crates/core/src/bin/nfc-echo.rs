fn main() {
    std::process::exit(nfc_echo::cli::main_with_args(std::env::args_os()));
}
