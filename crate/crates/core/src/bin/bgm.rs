fn main() {
    std::process::exit(bgm::cli::run_from(std::env::args_os()));
}
