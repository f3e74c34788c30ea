fn main() {
    std::process::exit(roireg::cli::run(std::env::args_os()));
}
