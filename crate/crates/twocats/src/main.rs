fn main() {
    std::process::exit(twocats::cli::run(std::env::args().collect()));
}
