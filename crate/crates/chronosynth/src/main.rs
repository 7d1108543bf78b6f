fn main() {
    std::process::exit(chronosynth::cli::run(std::env::args_os()));
}
