fn main() {
    std::process::exit(jigsaw_cli::run(std::env::args_os()));
}
