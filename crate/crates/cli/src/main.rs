fn main() {
    std::process::exit(crowdlabel_cli::run(std::env::args_os()));
}
