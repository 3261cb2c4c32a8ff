fn main() {
    std::process::exit(tcdsg::cli::run(std::env::args_os()));
}
