fn main() {
    std::process::exit(contactdyn_cli::main_with(std::env::args_os()));
}
