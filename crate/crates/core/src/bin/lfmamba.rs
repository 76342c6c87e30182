fn main() {
    let code = lfmamba::cli::main_with(std::env::args(), &mut std::io::stdout());
    std::process::exit(code);
}
