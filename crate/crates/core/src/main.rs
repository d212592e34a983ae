fn main() {
    std::process::exit(lskkf::cli::run(std::env::args_os()));
}
