fn main() {
    std::process::exit(demerge::cli::run(std::env::args_os()));
}
