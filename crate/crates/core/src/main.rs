fn main() {
    std::process::exit(flowrnn::cli::run(std::env::args_os(), std::env::vars()));
}
