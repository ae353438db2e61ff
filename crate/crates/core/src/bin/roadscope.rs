fn main() {
    std::process::exit(roadscope::cli::run(std::env::args_os()));
}
