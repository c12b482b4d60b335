use clap::Parser;

fn main() {
    let args = wedgedisc::Args::parse();
    std::process::exit(wedgedisc::execute(&args));
}
