fn main() {
    std::process::exit(rareclass::cli::run(std::env::args_os()));
}
