fn main() {
    std::process::exit(chartdetr::cli::run(std::env::args_os()));
}
