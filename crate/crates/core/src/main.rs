fn main() {
    std::process::exit(pmc::cli::run(std::env::args_os()));
}
