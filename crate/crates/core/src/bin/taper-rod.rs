fn main() {
    std::process::exit(taper_rod::cli::run(std::env::args_os()));
}
