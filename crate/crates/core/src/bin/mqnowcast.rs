fn main() {
    std::process::exit(mqnowcast::cli::run(std::env::args_os()));
}
