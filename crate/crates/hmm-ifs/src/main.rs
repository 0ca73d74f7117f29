fn main() {
    std::process::exit(hmm_ifs::cli::run(std::env::args_os()));
}
