fn main() {
    std::process::exit(spdelab_cli::run(std::env::args_os()));
}
