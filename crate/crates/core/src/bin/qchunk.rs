fn main() {
    std::process::exit(qchunk::cli::run(std::env::args_os()));
}
