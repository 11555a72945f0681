fn main() {
    std::process::exit(occumap::cli::run(std::env::args_os()));
}
