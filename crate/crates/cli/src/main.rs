fn main() {
    std::process::exit(wellcorr_cli::run(std::env::args_os()));
}
