fn main() {
    let code = equiscene::cli::main(std::env::args().collect());
    std::process::exit(code);
}
