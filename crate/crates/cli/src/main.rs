fn main() {
    let code = fklab_cli::run_cli(std::env::args_os());
    std::process::exit(code);
}
