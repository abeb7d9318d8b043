fn main() {
    std::process::exit(icode_lab::cli::run(std::env::args_os()));
}
