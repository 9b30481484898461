fn main() {
    std::process::exit(avsep::cli::run(std::env::args()));
}
