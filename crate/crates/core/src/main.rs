fn main() {
    std::process::exit(protoset::cli::run(std::env::args_os()));
}
