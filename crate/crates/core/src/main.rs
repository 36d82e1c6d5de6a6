fn main() {
    std::process::exit(uda3d::cli::run(std::env::args_os()));
}
