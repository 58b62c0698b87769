fn main() {
    std::process::exit(homoclinic_cli::run(std::env::args_os()));
}
