fn main() {
    std::process::exit(hubtta::cli::run(std::env::args_os()));
}
