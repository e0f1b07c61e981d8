fn main() {
    incremark::cli::init_logging();
    let code = incremark::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
