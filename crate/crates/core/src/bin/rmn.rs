fn main() {
    std::process::exit(rmn::cli::run(std::env::args_os()));
}
