fn main() {
    std::process::exit(dpre::cli::run(std::env::args_os()));
}
