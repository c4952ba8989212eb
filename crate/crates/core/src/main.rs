fn main() {
    std::process::exit(xtsformer::cli::run(std::env::args_os()));
}
