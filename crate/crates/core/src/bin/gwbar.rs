fn main() {
    std::process::exit(gwbar::cli::run(std::env::args_os()));
}
